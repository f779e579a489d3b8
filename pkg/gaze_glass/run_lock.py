from datetime import datetime, timedelta, timezone
import functools
import json
import logging
import os

from .exceptions import RunLockError, RunLockTimeoutError


LOG = logging.getLogger(__name__)

LOCK_FILE_NAME = '.gaze-glass.lock'
DEFAULT_TTL_SECONDS = timedelta(minutes=30).total_seconds()


class run_lock(object):
    """
    An object that acts as a context manager and a function decorator for acquiring an
    exclusive lock on a run's output directory.
    """
    def __init__(self, lock_dir, ttl_seconds=DEFAULT_TTL_SECONDS, suppress_acquisition_exceptions=False):
        """
        This context manager/function decorator can be used in the following way

        .. code-block:: python

            from gaze_glass.run_lock import run_lock

            # Lock an output directory while a run writes into it
            try:
                with run_lock('runs/pretrain'):
                    # Write checkpoints and logs here
                    pass
            except RunLockError:
                print('Another run is writing to runs/pretrain')
            except RunLockTimeoutError:
                print('Run completed but the lock timed out')

            # Lock a function
            @run_lock('runs/sweep')
            def run_sweep():
                pass

        :type lock_dir: str
        :param lock_dir: The directory to lock. It is created if missing.
        :type ttl_seconds: float
        :param ttl_seconds: Age after which a lock is considered stale and deleted. ``None`` means
            locks never expire.
        :type suppress_acquisition_exceptions: bool
        :param suppress_acquisition_exceptions: Suppress exceptions when acquiring the lock and instead
            log an error message. Note that this is only applicable when using this as a decorator and
            not a context manager.

        :raises:
            * :class:`RunLockError <gaze_glass.exceptions.RunLockError>` when the lock cannot be obtained
            * :class:`RunLockTimeoutError <gaze_glass.exceptions.RunLockTimeoutError>` when the
              lock was deleted or taken over during execution
        """
        self.lock_dir = str(lock_dir)
        self.lock_path = os.path.join(self.lock_dir, LOCK_FILE_NAME)
        self.ttl_seconds = ttl_seconds
        self.suppress_acquisition_exceptions = suppress_acquisition_exceptions
        self.token = None

    def read_lock(self):
        """
        Returns the payload of the current lock file or ``None`` when there is no readable lock.

        :rtype: dict
        """
        try:
            with open(self.lock_path, 'r') as handle:
                return json.load(handle)
        except (OSError, ValueError):
            return None

    def delete_expired_lock(self):
        """
        Deletes the lock file if a ttl is configured and the lock is older than it.
        """
        if self.ttl_seconds is None:
            return
        payload = self.read_lock()
        if payload is None:
            return
        try:
            creation_time = datetime.fromisoformat(payload['creation_time'])
        except (KeyError, TypeError, ValueError):
            LOG.warning('Lock %s has no readable creation time; leaving it in place', self.lock_path)
            return
        if creation_time <= datetime.now(timezone.utc) - timedelta(seconds=self.ttl_seconds):
            LOG.warning('Deleting stale lock %s created at %s', self.lock_path, payload['creation_time'])
            try:
                os.remove(self.lock_path)
            except FileNotFoundError:
                pass

    def __call__(self, func):
        return self.decorate_callable(func)

    def __enter__(self):
        self.start()

    def __exit__(self, *args):
        self.stop()

    def start(self):
        """
        Acquires the lock. Takes the necessary steps to delete a stale lock first.
        Throws a RunLockError if it can't acquire the lock.
        """
        os.makedirs(self.lock_dir, exist_ok=True)
        self.delete_expired_lock()
        now = datetime.now(timezone.utc)
        self.token = '{0}:{1}'.format(os.getpid(), now.isoformat())
        try:
            fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockError('Could not acquire lock: {0}'.format(self.lock_dir))
        with os.fdopen(fd, 'w') as handle:
            json.dump({'lock_id': self.lock_dir, 'token': self.token, 'creation_time': now.isoformat()}, handle)

    def stop(self):
        """
        Releases the lock. Throws an error if the lock was released or replaced before the run finished.
        """
        payload = self.read_lock()
        if payload is None or payload.get('token') != self.token:
            raise RunLockTimeoutError('Lock {0} expired before run completed'.format(self.lock_dir))
        os.remove(self.lock_path)

    def decorate_callable(self, func):
        """
        Decorates a function with the run_lock decorator by using this class as a context manager around
        it.
        """
        def wrapper(*args, **kwargs):
            try:
                with self:
                    result = func(*args, **kwargs)
                return result
            except RunLockError as e:
                if self.suppress_acquisition_exceptions:
                    LOG.error(e)
                else:
                    raise e
        functools.update_wrapper(wrapper, func)
        return wrapper
