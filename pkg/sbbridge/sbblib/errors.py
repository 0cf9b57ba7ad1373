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
"""sbbridge error objects."""


def FormatErrorMsg(e, context=None):
  """Convert an exception into a standard format.

  The standard error message format is:

      <context>: <ExceptionType>: <msg>

  Arguments:
    e: An exception.
    context: (str) Where the exception happened, e.g. a scenario name.

  Returns:
    A properly formatted error message string.
  """
  msg = '{}: {}'.format(type(e).__name__, e)
  if context:
    return '{}: {}'.format(context, msg)
  return msg


def _FormatIndices(indices, limit=8):
  indices = [int(i) for i in indices]
  shown = ', '.join(str(i) for i in indices[:limit])
  if len(indices) > limit:
    shown += ', ... ({} total)'.format(len(indices))
  return shown


class SBBError(Exception):
  """Parent class for user errors or input errors.

  Exceptions of this type are handled by the command line tool
  and result in clear error messages, as opposed to backtraces.
  """
  pass


class DomainTooSmallError(SBBError):
  """The grid does not cover the support a measure needs."""
  pass


class GridMismatchError(SBBError):
  """Two objects that must share a grid do not."""
  pass


class OutOfRangeError(SBBError, ValueError):
  """An argument lies outside its admissible range."""
  pass


class NonMonotoneMapError(SBBError):
  """A map that must be strictly increasing is not.

  For maps built from a potential this means the iterate violates the
  constraint d^2 v / dx^2 < beta.
  """

  def __init__(self, message, indices=()):
    self.indices = tuple(int(i) for i in indices)
    if self.indices:
      message = '{} (nodes {})'.format(message, _FormatIndices(self.indices))
    super(NonMonotoneMapError, self).__init__(message)


class NonConvexError(SBBError):
  """A potential fails the discrete convexity test."""
  pass


class NonPositiveVolatilityError(SBBError):
  """The volatility 1 + (1/beta) d^2 log h is not positive everywhere."""

  def __init__(self, message, indices=(), time=None):
    self.indices = tuple(int(i) for i in indices)
    self.time = time
    if time is not None:
      message = '{} at t={!r}'.format(message, time)
    if self.indices:
      message = '{} (nodes {})'.format(message, _FormatIndices(self.indices))
    super(NonPositiveVolatilityError, self).__init__(message)


class ConvexOrderError(SBBError):
  """The marginals are not in convex order."""
  pass


class TimeNotStoredError(SBBError):
  """A requested time is not one of the stored times."""
  pass


class InsufficientTimesError(SBBError):
  """Too few stored times to form a time difference."""
  pass


class PathEscapeError(SBBError):
  """Too many simulated paths left the admissible domain."""

  def __init__(self, message, count=0):
    self.count = int(count)
    super(PathEscapeError, self).__init__(message)


class SchemeMismatchError(SBBError):
  """A path ensemble was produced by the wrong simulation scheme."""
  pass


class LayoutMismatchError(SBBError):
  """Two solution directories cannot be compared."""
  pass


class ScenarioError(SBBError):
  """Raised when there's a problem reading a scenario file."""
  pass
