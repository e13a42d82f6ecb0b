import os
import tempfile
from contextlib import contextmanager


@contextmanager
def atomic_path(path):
    """
    Yields a temporary path next to `path`; on success it is renamed over `path`.

    Readers never see a partially written file. On error the temporary file
    is removed and the previous content (if any) stays in place.

    Args:
        path (str | os.PathLike): Final destination.
    """
    path = os.fspath(path)
    folder = os.path.dirname(path) or "."
    os.makedirs(folder, exist_ok=True)
    suffix = os.path.splitext(path)[1]
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", suffix=suffix, dir=folder)
    os.close(fd)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_bytes(path, payload: bytes):
    with atomic_path(path) as tmp_path:
        with open(tmp_path, "wb") as fh:
            fh.write(payload)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))
