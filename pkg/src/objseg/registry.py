"""Named weight storage.

Every learned tensor in the engine lives in a :class:`ParamRegistry` under a
dotted path (e.g. ``object_transformer.block0.cross_attn.q_proj.weight``).
The naming scheme is part of the weight-file contract.  Registries are frozen
before inference; initialization is a pure function of the seed.
"""

from __future__ import annotations

import numpy as np

from .errors import MissingParameterError, StateError

DEFAULT_INIT_STD = 0.02


class ParamRegistry:
    """Ordered name -> array map with seeded initialization helpers."""

    def __init__(self, rng_seed: int = 0, default_std: float = DEFAULT_INIT_STD):
        self.rng_seed = rng_seed
        self.default_std = default_std
        self._rng = np.random.Generator(np.random.PCG64(rng_seed))
        self._params: dict[str, np.ndarray] = {}
        self._frozen = False

    # -- construction -----------------------------------------------------

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if self._frozen:
            raise StateError("registry is frozen")
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        arr = np.ascontiguousarray(value, dtype=np.float32)
        self._params[name] = arr
        return arr

    def add_trunc_normal(self, name: str, shape: tuple[int, ...], std: float | None = None) -> np.ndarray:
        """Truncated normal (|x| <= 2*std) by resampling out-of-range draws.

        Resampling (rather than clipping) keeps the distribution smooth at
        the truncation boundary.  ``std`` falls back to the registry-wide
        default recorded in the run manifest.
        """
        if std is None:
            std = self.default_std
        n = int(np.prod(shape))
        draws = self._rng.standard_normal(n) * std
        bad = np.abs(draws) > 2 * std
        while bad.any():
            draws[bad] = self._rng.standard_normal(int(bad.sum())) * std
            bad = np.abs(draws) > 2 * std
        return self.add(name, draws.reshape(shape).astype(np.float32))

    def add_zeros(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        return self.add(name, np.zeros(shape, dtype=np.float32))

    def add_ones(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        return self.add(name, np.ones(shape, dtype=np.float32))

    def freeze(self) -> "ParamRegistry":
        for arr in self._params.values():
            arr.flags.writeable = False
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    # -- access -----------------------------------------------------------

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._params[name]
        except KeyError:
            raise MissingParameterError(f"parameter not registered: {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    # -- functional update (used by the finite-difference harness) --------

    def with_param(self, name: str, value: np.ndarray) -> "ParamRegistry":
        """Copy of this registry with one parameter replaced."""
        if name not in self._params:
            raise MissingParameterError(f"parameter not registered: {name}")
        clone = ParamRegistry(self.rng_seed)
        for k, v in self._params.items():
            clone._params[k] = np.array(value if k == name else v, copy=True)
        if self._frozen:
            clone.freeze()
        return clone

    def astype(self, dtype) -> "ParamRegistry":
        """Copy of this registry with every parameter cast to ``dtype``."""
        clone = ParamRegistry(self.rng_seed)
        for k, v in self._params.items():
            clone._params[k] = v.astype(dtype)
        if self._frozen:
            clone.freeze()
        return clone
