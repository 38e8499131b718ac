"""JIT switch for the hot kernels.

Kernels are written as plain Python over numpy arrays so they run unchanged
when numba is absent or disabled.  Set ``VPFUZZ_DISABLE_JIT=1`` to force the
pure-numpy path (useful for debugging and for the kernel benchmark).

numba keys its on-disk cache on the timestamp of the file that defines a
kernel only, so a kernel that inlines one from another module would keep
stale machine code after that module changes.  The cache therefore lives in
a directory named after a hash of every source file in the package.
"""

import hashlib
import os
import tempfile
from pathlib import Path

_DISABLED = os.environ.get("VPFUZZ_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("disabled by VPFUZZ_DISABLE_JIT")
    import numba

    JIT_ENABLED = True
except ImportError:
    numba = None
    JIT_ENABLED = False

_PACKAGE_DIR = Path(__file__).resolve().parent


def source_hash():
    h = hashlib.blake2b(digest_size=8)
    for path in sorted(_PACKAGE_DIR.rglob("*.py")):
        h.update(str(path.relative_to(_PACKAGE_DIR)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def _writable(path):
    try:
        path.mkdir(parents=True, exist_ok=True)
        tempfile.TemporaryFile(dir=path).close()
    except OSError:
        return False
    return True


def _pick_cache_dir():
    name = f"numba-{source_hash()}"
    candidates = [_PACKAGE_DIR / "__pycache__" / name, Path(tempfile.gettempdir()) / f"vpfuzz-{name}"]
    user = os.environ.get("NUMBA_CACHE_DIR")
    if user:
        candidates.insert(0, Path(user) / f"vpfuzz-{name}")
    for path in candidates:
        if _writable(path):
            return str(path)
    return None


CACHE_DIR = _pick_cache_dir() if JIT_ENABLED else None


def kernel(fn):
    """Compile ``fn`` with ``numba.njit`` when available, else return it as-is."""
    if not JIT_ENABLED:
        return fn
    if CACHE_DIR is None:
        return numba.njit(nogil=True)(fn)
    # the locator reads the setting once, while caching is enabled here
    saved = numba.config.CACHE_DIR
    numba.config.CACHE_DIR = CACHE_DIR
    try:
        return numba.njit(cache=True, nogil=True)(fn)
    finally:
        numba.config.CACHE_DIR = saved


def backend_name():
    return "numba" if JIT_ENABLED else "numpy"
