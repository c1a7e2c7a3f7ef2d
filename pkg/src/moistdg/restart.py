"""Exact-state persistence: restart checkpoints and modal field dumps.

Two flavours share one ``.npz`` container:

* a *checkpoint* stores the modal coefficients together with everything
  else that influences subsequent arithmetic -- the accumulated fallout
  profile and the per-point-group Newton warm-start temperature caches --
  plus the configuration hash.  Resuming from a checkpoint reproduces the
  uninterrupted run bit for bit, because the recovery iteration count
  (and hence its rounding path) depends on the warm-start values.
* a *modal dump* stores only the coefficients and the time stamp; the
  convergence harness reads these for cross-mesh error evaluation.

Loading verifies the stored mesh/order signature, and ``load_checkpoint``
additionally the configuration hash, so a stale file cannot silently
continue a different experiment.
"""

import numpy as np

from .errors import ConfigurationError, OutputError

__all__ = ["save_checkpoint", "load_checkpoint", "save_modal",
           "load_modal"]

_FORMAT = 1


def _signature(disc):
    m = disc.mesh
    return np.array([m.nx, m.nz, disc.k, disc.ncomp], dtype=np.int64)


def _check_signature(data, disc, path):
    sig = np.asarray(data["signature"])
    want = _signature(disc)
    if sig.shape != want.shape or not np.array_equal(sig, want):
        raise ConfigurationError(
            f"state file {path} was written for mesh/order "
            f"(nx, nz, k, ncomp) = {tuple(int(v) for v in sig)}, "
            f"run uses {tuple(int(v) for v in want)}")


def save_checkpoint(path, disc, op, coef, t: float, step: int,
                    cfg_hash: str):
    """Write a resume-exact checkpoint of the run state."""
    arrays = {
        "format": np.int64(_FORMAT),
        "signature": _signature(disc),
        "config_hash": np.str_(cfg_hash),
        "coef": np.asarray(coef).reshape(disc.shape),
        "t": np.float64(t),
        "step": np.int64(step),
        "fallout_profile": np.asarray(op.fallout_profile),
    }
    for key, cache in op.cache.items():
        arrays["cache_" + key] = np.asarray(cache)
    try:
        np.savez(path, **arrays)
    except OSError as exc:
        raise OutputError(f"cannot write checkpoint {path}: {exc}") from None


def load_checkpoint(path, disc, op, cfg_hash: str):
    """Restore a checkpoint into ``op`` and return ``(coef, t, step)``.

    Cache and fallout arrays are filled in place, so a compiled-backend
    operator whose kernel context already references them keeps seeing
    the restored values.
    """
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise OutputError(f"cannot read checkpoint {path}: {exc}") from None
    with data:
        _check_signature(data, disc, path)
        stored = str(data["config_hash"])
        if stored != cfg_hash:
            raise ConfigurationError(
                f"checkpoint {path} was produced by a different "
                f"configuration (hash {stored[:12]}..., expected "
                f"{cfg_hash[:12]}...)")
        cache_keys = {k[len("cache_"):] for k in data.files
                      if k.startswith("cache_")}
        if cache_keys != set(op.cache):
            raise ConfigurationError(
                f"checkpoint {path} stores recovery caches "
                f"{sorted(cache_keys)} but the operator expects "
                f"{sorted(op.cache)}")
        for key in op.cache:
            stored_cache = data["cache_" + key]
            if stored_cache.shape != op.cache[key].shape:
                raise ConfigurationError(
                    f"checkpoint cache {key!r} has shape "
                    f"{stored_cache.shape}, expected {op.cache[key].shape}")
            op.cache[key][...] = stored_cache
        op.fallout_profile[...] = data["fallout_profile"]
        coef = np.array(data["coef"])
        if coef.shape != disc.shape:
            raise ConfigurationError(
                f"checkpoint state shape {coef.shape} does not match "
                f"{disc.shape}")
        return coef, float(data["t"]), int(data["step"])


def save_modal(path, disc, coef, t: float, step: int):
    """Write a coefficients-only field dump (for error evaluation)."""
    try:
        np.savez(path,
                 format=np.int64(_FORMAT),
                 signature=_signature(disc),
                 coef=np.asarray(coef).reshape(disc.shape),
                 t=np.float64(t),
                 step=np.int64(step))
    except OSError as exc:
        raise OutputError(f"cannot write field dump {path}: {exc}") from None


def load_modal(path, disc=None):
    """Read a field dump; returns ``(coef, t)``.

    When ``disc`` is given the stored mesh/order signature is checked
    against it.
    """
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise OutputError(f"cannot read field dump {path}: {exc}") from None
    with data:
        if disc is not None:
            _check_signature(data, disc, path)
        return np.array(data["coef"]), float(data["t"])
