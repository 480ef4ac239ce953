import typing as tp
from abc import ABCMeta

import numpy as np

from previewmpc.errors import DimensionError

_GenericAlias = type(tp.List[int])  # int is just a dummy type, it could be anything


class IdentityGeneric(ABCMeta):
    def __getitem__(cls, *keys: tp.Any):
        return _GenericAlias(cls, keys)


class FieldKind(object, metaclass=IdentityGeneric):
    pass


class _Array(FieldKind):
    pass


class _Matrix(_Array):
    pass


class _Vector(_Array):
    pass


class _Static(metaclass=IdentityGeneric):
    pass


# static checkers see `tp.Union`, annotations at runtime resolve to the markers
Array = tp.Union  # static
globals()["Array"] = _Array  # real

Matrix = tp.Union  # static
globals()["Matrix"] = _Matrix  # real

Vector = tp.Union  # static
globals()["Vector"] = _Vector  # real

Static = tp.Union  # static
globals()["Static"] = _Static  # real


def as_matrix(value: tp.Any, name: str, shape: tp.Optional[tp.Tuple[int, int]] = None) -> np.ndarray:
    """
    Converts `value` to a float64 2-D array, scalars and flat sequences are promoted
    to a single row matrix only when `shape` allows it.

    Arguments:
        value: anything `np.asarray` understands.
        name: field name used in error messages.
        shape: optional expected shape.

    Returns:
        A float64 matrix.
    """
    array = np.asarray(value, dtype=np.float64)

    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1 and shape is not None and array.size == shape[0] * shape[1]:
        array = array.reshape(shape)

    if array.ndim != 2:
        raise DimensionError(f"'{name}' must be a matrix, got shape {array.shape}")

    if shape is not None and array.shape != tuple(shape):
        raise DimensionError(
            f"'{name}' must have shape {tuple(shape)}, got {array.shape}"
        )

    return array


def as_vector(value: tp.Any, name: str, size: tp.Optional[int] = None) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64).reshape(-1)

    if size is not None and array.shape[0] != size:
        raise DimensionError(f"'{name}' must have {size} entries, got {array.shape[0]}")

    return array
