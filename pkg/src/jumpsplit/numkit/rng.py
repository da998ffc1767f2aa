"""Counter-based random streams.

A stream is identified by a master seed and a lane, a tuple of integers.
Every draw is a hash of (key, counter), so the value produced at a given
position never depends on how many other lanes were consumed before it,
on the batch size, or on the number of worker threads.

Lane components may be integer arrays.  They broadcast against each other
and the resulting stream is a *batch* of independent lanes sharing one
counter.  Drawing ``n`` values from a batch of shape ``S`` returns an array
of shape ``S + (n,)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from ..errors import ParameterError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = 2.0 ** -53


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on a uint64 array (wrap-around arithmetic)."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _fold(keys: np.ndarray, component) -> np.ndarray:
    c = np.asarray(component)
    if c.dtype.kind not in "iub":
        raise TypeError(f"lane components must be integers, got {c.dtype}")
    c = c.astype(np.uint64)
    with np.errstate(over="ignore"):
        return _mix(keys ^ _mix(c * _GOLDEN + np.uint64(0x632BE59BD9B4E019)))


@dataclass
class RngStream:
    """A batch of counter-based random lanes.

    Parameters
    ----------
    master_seed : int
        Non-negative run seed.
    lane : tuple
        Lane identifier; components are ints or broadcastable int arrays.
    """

    master_seed: int
    lane: tuple = ()
    counter: int = 0
    _keys: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.master_seed) < 0:
            raise ParameterError("master_seed must be non-negative")
        if self._keys is None:
            with np.errstate(over="ignore"):
                k = _mix(np.array(int(self.master_seed) % 2**64, dtype=np.uint64) + _GOLDEN)
            k = np.asarray(k).reshape(())
            for c in self.lane:
                k = _fold(k, c)
            self._keys = np.asarray(k)

    @property
    def shape(self) -> tuple:
        return self._keys.shape

    def child(self, *components) -> "RngStream":
        """Extend the lane; the child has its own counter starting at zero."""
        keys = self._keys
        for c in components:
            keys = _fold(keys, c)
        return RngStream(self.master_seed, self.lane + tuple(components), 0, np.asarray(keys))

    def take(self, index) -> "RngStream":
        """Sub-batch of lanes selected by ``index`` (keeps the counter)."""
        return RngStream(self.master_seed, self.lane, self.counter, self._keys[index])

    def reshape(self, *shape) -> "RngStream":
        """Same lanes with the batch reshaped (counter kept)."""
        return RngStream(self.master_seed, self.lane, self.counter, self._keys.reshape(*shape))

    def at(self, counter: int) -> "RngStream":
        """Copy of this stream positioned at an explicit counter."""
        return RngStream(self.master_seed, self.lane, int(counter), self._keys)

    # raw draws -------------------------------------------------------
    def _bits(self, n: int, start: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            ctr = (np.arange(n, dtype=np.uint64) + np.uint64(start + 1)) * _GOLDEN
            k = self._keys[..., None]
            return _mix(_mix(k + ctr) ^ (k >> np.uint64(7)))

    def uniform(self, n: int) -> np.ndarray:
        """Open-interval uniforms on (0, 1), shape ``self.shape + (n,)``."""
        bits = self._bits(n, self.counter)
        self.counter += n
        return ((bits >> _S11).astype(np.float64) + 0.5) * _TWO53

    def normal(self, n: int) -> np.ndarray:
        return special.ndtri(self.uniform(n))


def substream(master_seed: int, lane=()) -> RngStream:
    """Stream for ``lane`` under ``master_seed``."""
    return RngStream(int(master_seed), tuple(lane))


def derive_seed(master_seed: int, lane=()) -> int:
    """A fresh 63-bit master seed determined by (master_seed, lane)."""
    bits = substream(master_seed, lane)._bits(1, 0)
    return int(bits.reshape(-1)[0] >> np.uint64(1))


def sample_uniform(stream: RngStream, n: int) -> np.ndarray:
    return stream.uniform(n)


def sample_normal(stream: RngStream, n: int) -> np.ndarray:
    return stream.normal(n)


def sample_uniform_cube(stream: RngStream, d: int) -> np.ndarray:
    return stream.uniform(d)


def sample_uniform_sphere(stream: RngStream, d: int) -> np.ndarray:
    """Uniform direction on the unit sphere in R^d."""
    g = stream.normal(d)
    nrm = np.linalg.norm(g, axis=-1, keepdims=True)
    return g / nrm


def sample_poisson(stream: RngStream, rate) -> np.ndarray:
    """One Poisson draw per lane by inversion (rate broadcast to the batch)."""
    rate = np.broadcast_to(np.asarray(rate, dtype=float), stream.shape)
    if np.any(rate < 0) or not np.all(np.isfinite(rate)):
        raise ParameterError("Poisson rate must be finite and non-negative")
    u = stream.uniform(1)[..., 0]
    out = np.zeros(stream.shape, dtype=np.int64)
    pos = rate > 0
    if np.any(pos):
        out[pos] = stats.poisson.ppf(u[pos], rate[pos]).astype(np.int64)
    return out


def sample_gamma(stream: RngStream, shape, rate) -> np.ndarray:
    """One Gamma(shape, rate) draw per lane by inversion.

    Small shapes use X = Y * U**(1/a) with Y ~ Gamma(a + 1), which keeps the
    inversion well conditioned; two uniforms are consumed per lane always.
    """
    a = np.broadcast_to(np.asarray(shape, dtype=float), stream.shape)
    b = np.broadcast_to(np.asarray(rate, dtype=float), stream.shape)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ParameterError("gamma shape and rate must be positive")
    u = stream.uniform(2)
    small = a < 1.0
    aa = np.where(small, a + 1.0, a)
    y = special.gammaincinv(aa, u[..., 0])
    with np.errstate(under="ignore"):
        boost = np.where(small, np.exp(np.log(u[..., 1]) / a), 1.0)
    return y * boost / b
