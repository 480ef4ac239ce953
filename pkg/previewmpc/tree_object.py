import enum
import io
import typing as tp
from abc import ABCMeta

import jax
import jax.tree_util
import numpy as np
import yaml
from rich.console import Console
from rich.table import Table
from rich.text import Text

from previewmpc import types

A = tp.TypeVar("A")
T = tp.TypeVar("T", bound="TreeObject")

ARRAY = "array"
TREE = "tree"
STATIC = "static"

SIMPLE_TYPES = (int, float, str, bool, np.integer, np.floating, np.bool_)

_FIELD_KINDS: tp.Dict[type, tp.Dict[str, str]] = {}


class TreeObjectMeta(ABCMeta):
    def __call__(cls, *args, **kwargs) -> "TreeObject":
        obj: TreeObject = cls.__new__(cls)

        obj.__init__(*args, **kwargs)

        if not obj._init_called:
            raise RuntimeError(
                f"{obj.__class__.__name__} not initialized properly, constructor must call `super().__init__()`"
            )

        object.__setattr__(obj, "_frozen", True)

        return obj


class TreeObject(metaclass=TreeObjectMeta):
    """Immutable value object that is also a JAX pytree.

    Fields annotated with `types.Array` (or `types.Matrix` / `types.Vector`) and
    fields holding other `TreeObject`s are the pytree children, every other field
    is static auxiliary data. Objects are frozen once their constructor returns,
    use `replace` to derive modified copies.

    Example:
    ```python
    class Gain(TreeObject):
        K: types.Matrix[np.ndarray]
        name: str

        def __init__(self, K, name="lqr"):
            super().__init__()
            self.K = np.asarray(K)
            self.name = name

    gain = Gain(np.eye(2))
    doubled = jax.tree_util.tree_map(lambda x: 2 * x, gain)
    ```
    """

    _init_called: bool = False
    _frozen: bool = False

    def __init__(self) -> None:
        self._init_called = True

    def __init_subclass__(cls):
        jax.tree_util.register_pytree_node_class(cls)

    def __setattr__(self, name: str, value: tp.Any) -> None:
        if self._frozen:
            raise AttributeError(
                f"{self.__class__.__name__} is immutable, use `replace` to create a modified copy"
            )
        object.__setattr__(self, name, value)

    # ------------------------
    # Pytree implementation
    # ------------------------
    def tree_flatten(self):
        kinds = _field_kinds(type(self))

        tree = {}
        not_tree = {}

        for field, value in vars(self).items():
            kind = kinds.get(field, None)

            # auto-annotations
            if kind is None and isinstance(value, TreeObject):
                kind = TREE

            if kind in (ARRAY, TREE):
                tree[field] = value
            else:
                not_tree[field] = value

        children = (tree,)

        return children, not_tree

    @classmethod
    def tree_unflatten(cls, not_tree, children):
        obj = cls.__new__(cls)
        (tree,) = children

        for k, v in tree.items():
            object.__setattr__(obj, k, v)

        for k, v in not_tree.items():
            object.__setattr__(obj, k, v)

        object.__setattr__(obj, "_frozen", True)

        return obj

    # ------------------------
    # API
    # ------------------------
    def copy(self: T) -> T:
        """
        Returns a copy of the object, implemented as:
        ```python
        jax.tree_util.tree_map(lambda x: x, self)
        ```
        """
        return jax.tree_util.tree_map(lambda x: x, self)

    def replace(self: T, **fields: tp.Any) -> T:
        """
        Creates a new object with the same content except for the given fields.

        Arguments:
            **fields: field names and their new values.

        Returns:
            The new object, `self` is not modified.
        """
        obj = self.copy()

        for field, value in fields.items():
            if field not in vars(obj):
                raise AttributeError(
                    f"{self.__class__.__name__} has no field '{field}'"
                )
            object.__setattr__(obj, field, value)

        return obj

    def to_dict(self) -> tp.Dict[str, tp.Any]:
        """
        Returns a JSON friendly nested dict: arrays become (nested) lists, nested
        TreeObjects become dicts, simple static values are kept and everything
        else (callables, private fields) is dropped.
        """
        return {
            field: _to_plain(value)
            for field, value in vars(self).items()
            if not field.startswith("_") and _is_plain(value)
        }

    def __repr__(self) -> str:
        rep = _get_repr(self, level=0, inline=False)
        return _get_rich_repr(Text.from_markup(rep))

    def tabulate(self, title: tp.Optional[str] = None) -> str:
        """
        Returns a tabular representation of the object's public fields.

        Arguments:
            title: Optional table title.

        Returns:
            A string containing the rendered table.
        """
        kinds = _field_kinds(type(self))
        table = Table(show_header=True, show_lines=True, title=title)

        table.add_column("field")
        table.add_column("kind")
        table.add_column("value")

        for field, value in vars(self).items():
            if field.startswith("_"):
                continue

            kind = kinds.get(field, TREE if isinstance(value, TreeObject) else STATIC)
            table.add_row(field, kind, Text.from_markup(_format_value(value)))

        return _get_rich_repr(table)


# --------------------------------------------------
# utils
# --------------------------------------------------


def _field_kinds(cls: type) -> tp.Dict[str, str]:
    if cls not in _FIELD_KINDS:
        _FIELD_KINDS[cls] = {
            field: _resolve_field_kind(field, annotation)
            for field, annotation in _get_all_annotations(cls).items()
        }

    return _FIELD_KINDS[cls]


def _get_all_annotations(cls):
    d = {}
    for c in reversed(cls.mro()):
        if "__annotations__" in vars(c):
            d.update(**vars(c)["__annotations__"])
    return d


def _resolve_field_kind(name: str, t: tp.Any) -> str:
    all_types = list(_all_types(t))

    if _generic_issubclass(t, types.FieldKind):
        if any(_generic_issubclass(x, (types.FieldKind, TreeObject)) for x in all_types[1:]):
            raise TypeError(
                f"Array annotations cannot contain Array or TreeObject types, got '{name}': {t}"
            )
        return ARRAY
    elif _generic_issubclass(t, types.Static):
        return STATIC
    elif any(_generic_issubclass(x, types.FieldKind) for x in all_types[1:]):
        raise TypeError(
            f"Array annotations have to be the top-level annotation, they cannot be used inside Generic types, got '{name}': {t}"
        )
    elif any(_generic_issubclass(x, TreeObject) for x in all_types):
        return TREE
    else:
        return STATIC


def _safe_issubclass(a, b) -> bool:
    return issubclass(a, b) if isinstance(a, type) else issubclass(type(a), b)


def _generic_issubclass(__cls, __class_or_tuple) -> bool:
    return _safe_issubclass(__cls, __class_or_tuple) or (
        hasattr(__cls, "__origin__")
        and isinstance(__cls.__origin__, type)
        and _safe_issubclass(__cls.__origin__, __class_or_tuple)
    )


def _all_types(t: tp.Any) -> tp.Iterable[tp.Any]:
    if hasattr(t, "__args__") and hasattr(t, "__origin__"):
        yield t.__origin__

        for arg in t.__args__:
            yield from _all_types(arg)
    else:
        yield t


def _is_plain(value: tp.Any) -> bool:
    if value is None or isinstance(value, (TreeObject, np.ndarray, jax.Array) + SIMPLE_TYPES):
        return True
    if isinstance(value, (list, tuple)):
        return all(_is_plain(x) for x in value)
    if isinstance(value, tp.Mapping):
        return all(_is_plain(x) for x in value.values())
    return False


def _to_plain(value: tp.Any) -> tp.Any:
    if isinstance(value, TreeObject):
        return value.to_dict()
    elif isinstance(value, enum.Enum):
        return value.value
    elif isinstance(value, (np.ndarray, jax.Array)):
        return np.asarray(value).tolist()
    elif isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    elif isinstance(value, (list, tuple)):
        return [_to_plain(x) for x in value]
    elif isinstance(value, tp.Mapping):
        return {k: _to_plain(v) for k, v in value.items()}
    else:
        return value


def _get_rich_repr(renderable) -> str:
    f = io.StringIO()
    console = Console(file=f, force_terminal=True)
    console.print(renderable)

    return f.getvalue()


def _format_value(value: tp.Any) -> str:
    if isinstance(value, (np.ndarray, jax.Array)):
        array = np.asarray(value)
        shape = ", ".join(str(x) for x in array.shape)

        if array.size <= 16:
            body = np.array2string(array, precision=6, suppress_small=True)
            return f"[green]({shape})[/] [dim]{array.dtype}[/]\n{body}"

        return f"[green]({shape})[/] [dim]{array.dtype}[/]"
    elif isinstance(value, TreeObject):
        return f"[dim]{value.__class__.__name__}[/]"
    elif isinstance(value, float):
        return f"{value:.6g}"
    else:
        return repr(value).replace("[", r"\[")


def _get_repr(obj, level: int, inline: bool, space="  ") -> str:
    indent_level = space * level

    if isinstance(obj, TreeObject):
        body = [
            indent_level
            + space
            + f"{field}: {_get_repr(value, level + 1, inline=True)}"
            for field, value in vars(obj).items()
            if not field.startswith("_")
        ]

        body_str = "\n".join(body)
        end_dot = ":" if not inline else ""
        type_str = (
            f"[dim]{obj.__class__.__name__}[/]" if inline else obj.__class__.__name__
        )

        return f"{type_str}{end_dot}\n{body_str}"

    elif isinstance(obj, (np.ndarray, jax.Array)):
        shape = ", ".join(str(x) for x in obj.shape)
        return f"Array([green]{shape}[/]) [dim]{obj.dtype}[/]"
    elif isinstance(obj, (list, tuple)) and any(isinstance(x, TreeObject) for x in obj):
        body = [
            indent_level + space + f"- {_get_repr(value, level + 2, inline=False)}"
            for value in obj
        ]
        return f"[dim]{obj.__class__.__name__}[/]\n" + "\n".join(body)
    else:
        return repr(obj).replace("[", r"\[")


def as_yaml_str(value) -> str:
    """Renders plain data (dicts, lists, numbers) as block-style YAML text."""
    if hasattr(value, "__len__") and len(value) == 0:
        return ""

    file = io.StringIO()
    yaml.safe_dump(
        value,
        file,
        default_flow_style=False,
        indent=2,
        sort_keys=False,
        explicit_end=False,
    )
    return file.getvalue().replace("\n...", "")
