import asyncio
import functools
import logging
import os
from contextlib import contextmanager

logger = logging.getLogger(__name__)


class OutputError(OSError):
    """
    Emission failure, carries the offending path.
    """
    def __init__(self, path, reason):
        super().__init__(f'Cannot write "{path}": {reason}')
        self.path = path


@contextmanager
def get_output(path=None, open_flags='w', default=None, newline=''):
    """
    Context manager that opens the file if a path was given, otherwise returns default value.

    :raises OutputError naming the path if the file cannot be opened
    """
    if path is not None:
        try:
            file = open(path, open_flags, newline=newline) if 'b' not in open_flags else open(path, open_flags)
        except OSError as e:
            raise OutputError(path, e.strerror or e) from e
        try:
            yield file
        finally:
            file.close()
    else:
        yield default


def ensure_directory(path):
    """
    :raises OutputError if the directory cannot be created
    """
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OutputError(path, e.strerror or e) from e
    return path


async def run_blocking(executor, func, *args, **kwargs):
    """
    Runs a blocking call in the executor (None: the loop's default executor).
    """
    loop = asyncio.get_running_loop()
    return await loop.run_in_executor(executor, functools.partial(func, *args, **kwargs))
