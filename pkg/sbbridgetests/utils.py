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
"""Utilities for tests."""

import contextlib
import io
import os
import shutil
import sys
import tempfile


@contextlib.contextmanager
def stdout_redirector(stream):  # pylint: disable=invalid-name
  old_stdout = sys.stdout
  sys.stdout = stream
  try:
    yield
  finally:
    sys.stdout = old_stdout


@contextlib.contextmanager
def stderr_redirector(stream):  # pylint: disable=invalid-name
  old_stderr = sys.stderr
  sys.stderr = stream
  try:
    yield
  finally:
    sys.stderr = old_stderr


# Returns a tuple of (io.file_obj, file_path) rather than an object with a
# .name attribute; the file can be reopened by path while the context is live.
@contextlib.contextmanager
def NamedTempFile(mode='w+b',
                  encoding=None,
                  newline=None,
                  suffix=None,
                  prefix=None,
                  dirname=None,
                  text=False):
  """Context manager creating a new temporary file."""
  (fd, fname) = tempfile.mkstemp(
      suffix=suffix, prefix=prefix, dir=dirname, text=text)
  f = io.open(fd, mode=mode, encoding=encoding, newline=newline)
  try:
    yield f, fname
  finally:
    f.close()
    os.remove(fname)


@contextlib.contextmanager
def TempFileContents(dirname, contents, encoding='utf-8', suffix=None):
  with NamedTempFile(
      dirname=dirname, mode='w', encoding=encoding, newline='',
      suffix=suffix) as (f, fname):
    f.write(contents)
    f.flush()
    yield fname


@contextlib.contextmanager
def TempDirectory():
  """Context manager yielding a fresh directory that is removed afterwards."""
  dirname = tempfile.mkdtemp(prefix='sbbridge_')
  try:
    yield dirname
  finally:
    shutil.rmtree(dirname, ignore_errors=True)


def WriteFile(dirname, name, contents):
  """Write `contents` to dirname/name and return the path."""
  path = os.path.join(dirname, name)
  with io.open(path, 'w', encoding='utf-8', newline='') as f:
    f.write(contents)
  return path
