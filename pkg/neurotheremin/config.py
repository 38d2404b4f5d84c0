"""Configuration files: JSON documents mapped onto frozen dataclasses."""

import dataclasses
import json
import logging
import typing

from neurotheremin.errors import ConfigError

logger = logging.getLogger(__name__)


def _dataclass_in_hint(hint):
    """Return the dataclass named by a type hint, unwrapping Optional."""
    if dataclasses.is_dataclass(hint):
        return hint
    for arg in typing.get_args(hint):
        if dataclasses.is_dataclass(arg):
            return arg
    return None


def from_dict(cls, data):
    """Build dataclass ``cls`` from a (possibly nested) mapping.

    Parameters
    ----------
    cls : type
        Target dataclass type.
    data : dict, cls instance or None
        Parsed configuration. ``None`` gives the defaults. Lists become
        tuples, nested mappings become nested dataclasses.

    Returns
    -------
    obj : cls

    Raises
    ------
    ConfigError
        On unknown keys or values rejected by the dataclass.

    """
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError('%s expects a mapping, got %r'
                          % (cls.__name__, type(data).__name__))
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError('unknown %s keys: %s'
                          % (cls.__name__, ', '.join(unknown)))
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        nested = _dataclass_in_hint(hints.get(name))
        if nested is not None and isinstance(value, dict):
            value = from_dict(nested, value)
        elif isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v
                          for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError('%s: %s' % (cls.__name__, err))


def to_dict(obj):
    """Dataclass to plain JSON-compatible dict (tuples become lists)."""
    return json.loads(json.dumps(dataclasses.asdict(obj)))


def load_json(path):
    """Read a JSON configuration file into a dict."""
    try:
        with open(path) as fobj:
            data = json.load(fobj)
    except (OSError, ValueError) as err:
        raise ConfigError('cannot read config %s: %s' % (path, err))
    if not isinstance(data, dict):
        raise ConfigError('config %s must hold a JSON object' % path)
    logger.debug('loaded config %s with keys %s', path, sorted(data))
    return data

