"""
Cache management utilities for ballfield.

Radial factors are stored as ``.npz`` archives keyed by the md5 digest of a
descriptive key string. Arrays come back bit-identical to what was stored.
"""

import os
import time
import hashlib
import logging
import zipfile
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

_TIMESTAMP = "__timestamp__"


class CacheManager:
    """Manager for caching radial factor arrays."""

    def __init__(self, settings):
        """Initialize the CacheManager.

        Args:
            settings: Object with ``enabled``, ``location`` and
                ``duration_days`` attributes (see CacheSettings).
        """
        self.enabled = settings.enabled
        self.location = settings.location
        self.duration_days = settings.duration_days

        # Create cache directory if it doesn't exist
        if self.enabled:
            os.makedirs(self.location, exist_ok=True)

    def _get_cache_key(self, key):
        """Generate a cache key from a string.

        Args:
            key: String to generate cache key from.

        Returns:
            str: Cache key as a hex digest.
        """
        return hashlib.md5(key.encode('utf-8')).hexdigest()

    def _get_cache_path(self, key):
        """Get the file path for a cache key."""
        return Path(self.location) / f"{self._get_cache_key(key)}.npz"

    def _load(self, cache_path):
        with np.load(cache_path, allow_pickle=False) as archive:
            return {name: archive[name] for name in archive.files}

    def _is_expired(self, timestamp):
        age_days = (time.time() - timestamp) / (60 * 60 * 24)
        return age_days > self.duration_days

    def get(self, key):
        """Get arrays from the cache.

        Args:
            key: Cache key.

        Returns:
            dict: Name to array mapping, or None if not found or expired.
        """
        if not self.enabled:
            return None

        cache_path = self._get_cache_path(key)

        if not cache_path.exists():
            logger.debug("Cache miss for %s", cache_path.name)
            return None

        try:
            arrays = self._load(cache_path)
            timestamp = float(arrays.pop(_TIMESTAMP))
        except (OSError, ValueError, KeyError, zipfile.BadZipFile):
            # Cache file is corrupted, remove it
            self.invalidate(key)
            return None

        if self._is_expired(timestamp):
            self.invalidate(key)
            return None

        return arrays

    def set(self, key, arrays):
        """Store arrays in the cache.

        Args:
            key: Cache key.
            arrays (dict): Name to array mapping.
        """
        if not self.enabled:
            return

        cache_path = self._get_cache_path(key)
        payload = {name: np.asarray(value) for name, value in arrays.items()}
        payload[_TIMESTAMP] = np.array(time.time())

        # np.savez appends .npz to names lacking it, so write through a handle
        with open(cache_path, 'wb') as f:
            np.savez(f, **payload)

    def is_valid(self, key):
        """Check if a cache key exists and is not expired."""
        if not self.enabled:
            return False

        cache_path = self._get_cache_path(key)

        if not cache_path.exists():
            return False

        try:
            arrays = self._load(cache_path)
            return not self._is_expired(float(arrays[_TIMESTAMP]))
        except (OSError, ValueError, KeyError, zipfile.BadZipFile):
            return False

    def invalidate(self, key):
        """Remove a key from the cache."""
        if not self.enabled:
            return

        cache_path = self._get_cache_path(key)

        if cache_path.exists():
            try:
                os.remove(cache_path)
            except OSError:
                pass

    def clear(self):
        """Clear all cached items."""
        if not self.enabled:
            return

        for cache_file in Path(self.location).glob('*.npz'):
            try:
                os.remove(cache_file)
            except OSError:
                pass
