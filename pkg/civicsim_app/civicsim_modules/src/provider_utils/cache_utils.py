import os
import json
import hashlib
import logging
import datetime
import tempfile
import threading
from pathlib import Path

logger = logging.getLogger(__name__)


def cache_key(provider, prompt):
    '''
    content address of a response, sha256 over the provider name and the untouched prompt text

            Parameters:
                    provider (str): provider name
                    prompt (str): full prompt text

            Returns:
                    key (str): hex digest
    '''
    h = hashlib.sha256()
    h.update(provider.encode('utf-8'))
    h.update(b'\0')
    h.update(prompt.encode('utf-8'))
    return h.hexdigest()


def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class ResponseCache:
    """
    on disk response cache laid out as <root>/<provider>/<digest>.txt plus <digest>.meta.json

    Attributes
    ----------
    root : Path
    provider : str
    hits : int
    misses : int

    Methods
    -------
    key(prompt=str):
        digest of the provider name and prompt
    lookup(key=str):
        stored text or None, a corrupted entry is reported and treated as absent
    store(key=str, text=str):
        atomic write of the text and its meta file
    """
    def __init__(self, root, provider):
        self.root = Path(root)
        self.provider = provider
        self.directory = self.root / provider
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def key(self, prompt):
        return cache_key(self.provider, prompt)

    def _paths(self, key):
        return self.directory / f'{key}.txt', self.directory / f'{key}.meta.json'

    def _count(self, hit):
        with self._lock:
            if hit:
                self.hits += 1
            else:
                self.misses += 1

    def lookup(self, key):
        text_path, meta_path = self._paths(key)
        if not text_path.exists() and not meta_path.exists():
            self._count(False)
            return None
        try:
            meta = json.loads(meta_path.read_text(encoding='utf-8'))
            data = text_path.read_bytes()
            if len(data) != meta['length'] or hashlib.sha256(data).hexdigest() != meta['response_sha256']:
                raise ValueError('stored text does not match its meta file')
            text = data.decode('utf-8')
        except (OSError, ValueError, KeyError, TypeError) as e:
            logger.warning('corrupted cache entry %s/%s ignored: %s', self.provider, key, e)
            self._count(False)
            return None
        self._count(True)
        return text

    def store(self, key, text):
        text_path, meta_path = self._paths(key)
        data = text.encode('utf-8')
        meta = {
            'timestamp': datetime.datetime.now(datetime.timezone.utc).isoformat(),
            'prompt_digest': key,
            'provider': self.provider,
            'response_sha256': hashlib.sha256(data).hexdigest(),
            'length': len(data),
        }
        atomic_write(text_path, data)
        atomic_write(meta_path, json.dumps(meta, indent=1).encode('utf-8'))

    def stats(self):
        return {'hits': self.hits, 'misses': self.misses}
